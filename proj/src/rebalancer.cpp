#include "semid/rebalancer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "semid/error.hpp"
#include "semid/kmeans.hpp"
#include "semid/rng.hpp"

namespace semid {

using nlohmann::json;

double balance_loss(const std::vector<int>& assignment, const std::vector<double>& pops, int m) {
    if (assignment.size() != pops.size())
        throw InvalidArgument("balance_loss: assignment/pops size mismatch");
    if (m < 1) throw InvalidArgument("balance_loss: M must be >= 1");
    std::vector<double> cluster_pop(m, 0.0);
    double total = 0.0;
    for (size_t j = 0; j < pops.size(); ++j) {
        if (assignment[j] < 0 || assignment[j] >= m)
            throw InvalidArgument("balance_loss: cluster index out of range");
        cluster_pop[assignment[j]] += pops[j];
        total += pops[j];
    }
    const double pbar = total / static_cast<double>(m);
    double loss = 0.0;
    for (int c = 0; c < m; ++c) loss += (cluster_pop[c] - pbar) * (cluster_pop[c] - pbar);
    return loss;
}

namespace {

// Child count available to a split at `level`: co-occurring next-level tokens,
// or member items at the deepest level.
int splittable_children(int level, int token, const ChildMap& child_map,
                        const std::vector<SemanticId>& sids, const Codebook& codebook) {
    if (level < codebook.num_levels() - 1)
        return static_cast<int>(child_map.children[level][token].size());
    int n = 0;
    for (const SemanticId& sid : sids)
        if (sid.tokens[level] == token) ++n;
    return n;
}

std::vector<Vec> weighted_cluster_means(const SplitInstance& instance,
                                        const std::vector<int>& assignment, int m) {
    const size_t d = instance.means.empty() ? 0 : instance.means[0].size();
    std::vector<Vec> mu(m, Vec(d, 0.0));
    std::vector<double> wsum(m, 0.0);
    std::vector<int> count(m, 0);
    for (size_t j = 0; j < instance.means.size(); ++j) {
        const int c = assignment[j];
        const double w = instance.weights[j];
        for (size_t t = 0; t < d; ++t) mu[c][t] += w * instance.means[j][t];
        wsum[c] += w;
        ++count[c];
    }
    for (int c = 0; c < m; ++c) {
        if (wsum[c] > 0.0) {
            for (size_t t = 0; t < d; ++t) mu[c][t] /= wsum[c];
        } else {
            // All-zero-weight cluster: fall back to the unweighted mean so the
            // centroid stays defined. Matched by split_objective.
            std::fill(mu[c].begin(), mu[c].end(), 0.0);
            if (count[c] > 0) {
                for (size_t j = 0; j < instance.means.size(); ++j)
                    if (assignment[j] == c)
                        for (size_t t = 0; t < d; ++t) mu[c][t] += instance.means[j][t];
                for (size_t t = 0; t < d; ++t) mu[c][t] /= static_cast<double>(count[c]);
            }
        }
    }
    return mu;
}

double distance_term(const SplitInstance& instance, const std::vector<int>& assignment,
                     const std::vector<Vec>& mu) {
    double sum = 0.0;
    for (size_t j = 0; j < instance.means.size(); ++j)
        sum += instance.weights[j] * squared_distance(instance.means[j], mu[assignment[j]]);
    return sum;
}

void validate_instance(const SplitInstance& instance, int m) {
    const size_t n = instance.means.size();
    if (instance.weights.size() != n || instance.pops.size() != n ||
        instance.child_tokens.size() != n || instance.child_items.size() != n)
        throw InvalidArgument("split instance arrays out of sync");
    if (m < 2) throw InvalidArgument("split needs M >= 2");
    if (n < static_cast<size_t>(m)) throw InvalidArgument("too-few-children: |Ch| < M");
    for (double w : instance.weights)
        if (w < 0.0 || !std::isfinite(w)) throw InvalidArgument("split weights must be >= 0");
    for (double p : instance.pops)
        if (p < 0.0 || !std::isfinite(p)) throw InvalidArgument("split pops must be >= 0");
}

}  // namespace

double split_lambda(const SplitInstance& instance, int m, double lambda_scaled) {
    const size_t n = instance.means.size();
    const size_t d = instance.means.empty() ? 0 : instance.means[0].size();
    double wtotal = 0.0;
    for (double w : instance.weights) wtotal += w;
    Vec global(d, 0.0);
    if (wtotal > 0.0) {
        for (size_t j = 0; j < n; ++j)
            for (size_t t = 0; t < d; ++t) global[t] += instance.weights[j] * instance.means[j][t];
        for (size_t t = 0; t < d; ++t) global[t] /= wtotal;
    }
    double mean_dist = 0.0;
    if (wtotal > 0.0) {
        for (size_t j = 0; j < n; ++j)
            mean_dist += instance.weights[j] * squared_distance(instance.means[j], global);
        mean_dist /= wtotal;
    }
    const double ptotal = std::accumulate(instance.pops.begin(), instance.pops.end(), 0.0);
    const double pbar = ptotal / static_cast<double>(m);
    if (pbar <= 0.0) return 0.0;
    return lambda_scaled * mean_dist / (pbar * pbar * static_cast<double>(m));
}

double split_objective(const SplitInstance& instance, const std::vector<int>& assignment, int m,
                       double lambda) {
    if (assignment.size() != instance.means.size())
        throw InvalidArgument("split_objective: assignment size mismatch");
    for (int c : assignment)
        if (c < 0 || c >= m) throw InvalidArgument("split_objective: cluster index out of range");
    const std::vector<Vec> mu = weighted_cluster_means(instance, assignment, m);
    return distance_term(instance, assignment, mu) + lambda * balance_loss(assignment, instance.pops, m);
}

SplitResult regularized_kmeans_split(const SplitInstance& instance, int m, double lambda_scaled,
                                     uint64_t seed, int max_iters) {
    validate_instance(instance, m);
    if (max_iters < 1) throw InvalidArgument("split needs max_iters >= 1");
    const size_t n = instance.means.size();
    const double lambda = split_lambda(instance, m, lambda_scaled);
    const double ptotal = std::accumulate(instance.pops.begin(), instance.pops.end(), 0.0);
    const double pbar = ptotal / static_cast<double>(m);

    std::vector<size_t> visit(n);  // descending n_j, ties by child index
    std::iota(visit.begin(), visit.end(), size_t{0});
    std::stable_sort(visit.begin(), visit.end(),
                     [&](size_t a, size_t b) { return instance.weights[a] > instance.weights[b]; });

    // Monotone descent from one seeding. Moves and pairwise exchanges are
    // accepted only on strict decrease of the full objective, so the trace is
    // non-increasing across sweeps and centroid steps.
    const auto descend = [&](std::vector<int> assignment) -> SplitResult {
        std::vector<Vec> mu = weighted_cluster_means(instance, assignment, m);
        std::vector<double> cluster_pop(m, 0.0);
        std::vector<int> cluster_size(m, 0);
        for (size_t j = 0; j < n; ++j) {
            cluster_pop[assignment[j]] += instance.pops[j];
            ++cluster_size[assignment[j]];
        }
        double objective = distance_term(instance, assignment, mu) +
                           lambda * balance_loss(assignment, instance.pops, m);
        int iterations = 0;
        for (int iter = 0; iter < max_iters; ++iter) {
            iterations = iter + 1;
            bool moved = false;
            for (size_t j : visit) {
                const int a = assignment[j];
                if (cluster_size[a] <= 1) continue;  // would empty its cluster
                const double w = instance.weights[j];
                const double p = instance.pops[j];
                const double da = w * squared_distance(instance.means[j], mu[a]);
                const double bal_a_now = (cluster_pop[a] - pbar) * (cluster_pop[a] - pbar);
                const double bal_a_out = (cluster_pop[a] - p - pbar) * (cluster_pop[a] - p - pbar);
                int best_c = -1;
                double best_delta = 0.0;  // only strict improvements accepted
                for (int b = 0; b < m; ++b) {
                    if (b == a) continue;
                    const double db = w * squared_distance(instance.means[j], mu[b]);
                    const double bal_b_now = (cluster_pop[b] - pbar) * (cluster_pop[b] - pbar);
                    const double bal_b_in =
                        (cluster_pop[b] + p - pbar) * (cluster_pop[b] + p - pbar);
                    const double delta =
                        (db - da) + lambda * ((bal_a_out - bal_a_now) + (bal_b_in - bal_b_now));
                    if (delta < best_delta) {
                        best_delta = delta;
                        best_c = b;
                    }
                }
                if (best_c >= 0) {
                    assignment[j] = best_c;
                    cluster_pop[a] -= p;
                    cluster_pop[best_c] += p;
                    --cluster_size[a];
                    ++cluster_size[best_c];
                    objective += best_delta;
                    moved = true;
                }
            }
            // Pairwise exchange sweep: single-child moves stall where the
            // balance term only improves by trading two children.
            if (n <= 512) {
                for (size_t i1 = 0; i1 < n; ++i1) {
                    const size_t j1 = visit[i1];
                    for (size_t i2 = i1 + 1; i2 < n; ++i2) {
                        const size_t j2 = visit[i2];
                        const int a = assignment[j1];
                        const int b = assignment[j2];
                        if (a == b) continue;
                        const double dd =
                            instance.weights[j1] * (squared_distance(instance.means[j1], mu[b]) -
                                                    squared_distance(instance.means[j1], mu[a])) +
                            instance.weights[j2] * (squared_distance(instance.means[j2], mu[a]) -
                                                    squared_distance(instance.means[j2], mu[b]));
                        const double pa = cluster_pop[a] - instance.pops[j1] + instance.pops[j2];
                        const double pb = cluster_pop[b] - instance.pops[j2] + instance.pops[j1];
                        const double dbal =
                            (pa - pbar) * (pa - pbar) -
                            (cluster_pop[a] - pbar) * (cluster_pop[a] - pbar) +
                            (pb - pbar) * (pb - pbar) -
                            (cluster_pop[b] - pbar) * (cluster_pop[b] - pbar);
                        if (dd + lambda * dbal < 0.0) {
                            assignment[j1] = b;
                            assignment[j2] = a;
                            cluster_pop[a] = pa;
                            cluster_pop[b] = pb;
                            moved = true;
                        }
                    }
                }
            }
            mu = weighted_cluster_means(instance, assignment, m);
            objective = distance_term(instance, assignment, mu) +
                        lambda * balance_loss(assignment, instance.pops, m);
            if (!moved) break;
        }

        SplitResult result;
        result.assignment = std::move(assignment);
        result.centroids = std::move(mu);
        result.cluster_pops = std::move(cluster_pop);
        result.distance_term = distance_term(instance, result.assignment, result.centroids);
        result.balance_term = balance_loss(result.assignment, instance.pops, m);
        result.objective = result.distance_term + lambda * result.balance_term;
        result.lambda = lambda;
        result.iterations = iterations;
        return result;
    };

    const auto attach_nearest = [&](const std::vector<size_t>& seeds) {
        std::vector<int> assignment(n, -1);
        for (int c = 0; c < m; ++c) assignment[seeds[c]] = c;
        for (size_t j = 0; j < n; ++j) {
            if (assignment[j] >= 0) continue;
            int best = 0;
            double best_d2 = squared_distance(instance.means[j], instance.means[seeds[0]]);
            for (int c = 1; c < m; ++c) {
                const double d2 = squared_distance(instance.means[j], instance.means[seeds[c]]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            assignment[j] = best;
        }
        return assignment;
    };

    // Seeding portfolio, best local fixpoint wins. The descent alone is easily
    // trapped: the balance term couples assignments, so the landscape has
    // basins no single-move path crosses.
    std::vector<std::vector<int>> seedings;

    // The M most popular children, one per cluster (ties: lower index).
    std::vector<size_t> by_pop(n);
    std::iota(by_pop.begin(), by_pop.end(), size_t{0});
    std::stable_sort(by_pop.begin(), by_pop.end(),
                     [&](size_t a, size_t b) { return instance.pops[a] > instance.pops[b]; });
    seedings.push_back(attach_nearest({by_pop.begin(), by_pop.begin() + m}));

    // Largest-pops-first onto the lightest cluster: covers the regime where
    // the balance term dominates and the problem degenerates to partitioning
    // the popularity masses.
    {
        std::vector<int> a(n, 0);
        std::vector<double> load(m, 0.0);
        for (size_t j : by_pop) {
            int c = 0;
            for (int b = 1; b < m; ++b)
                if (load[b] < load[c]) c = b;
            a[j] = c;
            load[c] += instance.pops[j];
        }
        std::vector<int> count(m, 0);
        for (int c : a) ++count[c];
        if (std::all_of(count.begin(), count.end(), [](int c) { return c > 0; }))
            seedings.push_back(std::move(a));
    }

    // Plain weighted K-means over the child means: covers the regime where
    // the distance term dominates. Weights clamp away from zero because the
    // seeding solver rejects zero weights; the descent uses the real ones.
    {
        std::vector<double> w = instance.weights;
        for (double& x : w) x = std::max(x, 1e-9);
        const KmeansResult km = kmeans(instance.means, w, m, max_iters, seed);
        std::vector<int> count(m, 0);
        for (int a : km.assignments) ++count[a];
        if (std::all_of(count.begin(), count.end(), [](int c) { return c > 0; }))
            seedings.push_back(km.assignments);
    }

    // D^2-sampled restarts for diversity.
    if (n > static_cast<size_t>(m)) {
        Rng rng(seed);
        for (int r = 0; r < 6; ++r) {
            std::vector<size_t> seeds;
            std::vector<uint8_t> used(n, 0);
            seeds.push_back(rng.next_below(n));
            used[seeds[0]] = 1;
            std::vector<double> d2(n);
            for (size_t j = 0; j < n; ++j)
                d2[j] = squared_distance(instance.means[j], instance.means[seeds[0]]);
            while (static_cast<int>(seeds.size()) < m) {
                size_t pick = rng.next_weighted(d2);
                if (used[pick]) {  // all remaining mass on chosen points
                    pick = 0;
                    while (used[pick]) ++pick;
                }
                used[pick] = 1;
                seeds.push_back(pick);
                for (size_t j = 0; j < n; ++j)
                    d2[j] = std::min(d2[j], squared_distance(instance.means[j], instance.means[pick]));
            }
            seedings.push_back(attach_nearest(seeds));
        }
    }

    SplitResult best = descend(std::move(seedings[0]));
    for (size_t s = 1; s < seedings.size(); ++s) {
        SplitResult cand = descend(std::move(seedings[s]));
        if (cand.objective < best.objective) best = std::move(cand);
    }
    return best;
}

SplitPlan select_split_targets(const TokenStats& stats, const ChildMap& child_map,
                               const std::vector<SemanticId>& sids, const Codebook& codebook,
                               double ratio, int m_cap, double lambda_scaled,
                               const std::vector<int>& levels) {
    if (ratio < 0.0 || ratio > 1.0) throw InvalidArgument("split ratio must lie in [0, 1]");
    if (m_cap < 2) throw InvalidArgument("M_cap must be >= 2");
    std::vector<int> wanted = levels;
    if (wanted.empty())
        for (int l = 0; l < codebook.num_levels(); ++l) wanted.push_back(l);
    for (int l : wanted)
        if (l < 0 || l >= codebook.num_levels())
            throw InvalidArgument("split level out of range");

    SplitPlan plan;
    plan.ratio = ratio;
    plan.lambda_scaled = lambda_scaled;
    for (int l : wanted) {
        std::vector<int> active;
        for (int t = 0; t < codebook.levels[l].size(); ++t)
            if (!codebook.levels[l].retired[t]) active.push_back(t);
        if (active.empty()) continue;
        double total = 0.0;
        for (int t : active) total += stats.pop[l][t];
        const double pbar = total / static_cast<double>(active.size());
        std::vector<int> order = active;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return stats.pop[l][a] > stats.pop[l][b]; });
        const int n_targets = static_cast<int>(std::ceil(ratio * static_cast<double>(active.size())));
        for (int r = 0; r < n_targets && r < static_cast<int>(order.size()); ++r) {
            const int token = order[r];
            if (stats.pop[l][token] <= 0.0) continue;
            const int n_children = splittable_children(l, token, child_map, sids, codebook);
            if (n_children < 2) continue;
            int m = pbar > 0.0 ? static_cast<int>(std::floor(stats.pop[l][token] / pbar)) : m_cap;
            m = std::clamp(m, 2, m_cap);
            m = std::min(m, n_children);
            plan.targets.push_back(SplitTarget{l, token, m});
        }
    }
    return plan;
}

SplitInstance build_split_instance(const SplitTarget& target, const ChildStatsTable& stats,
                                   const ChildMap& child_map, const std::vector<SemanticId>& sids,
                                   const ResidualTrace& trace, const FrequencyTable& freq,
                                   const Codebook& codebook) {
    SplitInstance instance;
    const int l = target.level;
    if (l < 0 || l >= codebook.num_levels()) throw InvalidArgument("split level out of range");
    if (l < codebook.num_levels() - 1) {
        for (const ChildStat& cs : stats.stats[l][target.token]) {
            instance.means.push_back(cs.mean_residual);
            instance.weights.push_back(static_cast<double>(cs.n));
            instance.pops.push_back(cs.cond_pop);
            instance.child_tokens.push_back(cs.child);
            instance.child_items.push_back(-1);
        }
    } else {
        // Deepest level: every member item is its own child, weighted by f_i.
        for (size_t i = 0; i < sids.size(); ++i) {
            if (sids[i].tokens[l] != target.token) continue;
            instance.means.push_back(trace.residuals[i][l]);
            instance.weights.push_back(static_cast<double>(freq.freq[i]));
            instance.pops.push_back(static_cast<double>(freq.freq[i]));
            instance.child_tokens.push_back(-1);
            instance.child_items.push_back(static_cast<int64_t>(i));
        }
    }
    (void)child_map;
    return instance;
}

RebalanceOutcome apply_split(const Codebook& codebook, const std::vector<SemanticId>& sids,
                             const SplitPlan& plan, const std::vector<SplitTarget>& targets,
                             const std::vector<SplitInstance>& instances,
                             const std::vector<SplitResult>& results) {
    if (targets.size() != instances.size() || targets.size() != results.size())
        throw InvalidArgument("inconsistent-plan: targets/instances/results out of sync");
    for (const SplitTarget& t : plan.targets) {
        const bool covered = std::any_of(targets.begin(), targets.end(), [&](const SplitTarget& u) {
            return u.level == t.level && u.token == t.token;
        });
        if (!covered) throw InvalidArgument("inconsistent-plan: plan target without a result");
    }
    for (size_t a = 0; a < targets.size(); ++a)
        for (size_t b = a + 1; b < targets.size(); ++b)
            if (targets[a].level == targets[b].level && targets[a].token == targets[b].token)
                throw InvalidArgument("inconsistent-plan: duplicate target");

    RebalanceOutcome out;
    out.codebook = codebook;
    out.sids = sids;
    int next_flat = codebook.vocab_size;

    for (size_t t = 0; t < targets.size(); ++t) {
        const SplitTarget& target = targets[t];
        const SplitInstance& instance = instances[t];
        const SplitResult& result = results[t];
        LevelCodebook& level = out.codebook.levels[target.level];
        if (target.token < 0 || target.token >= level.size() || level.retired[target.token])
            throw InvalidArgument("inconsistent-plan: target token not active");
        const int m = static_cast<int>(result.centroids.size());
        if (result.assignment.size() != instance.means.size())
            throw InvalidArgument("inconsistent-plan: result does not match instance");

        LineageEntry entry;
        entry.level = target.level;
        entry.old_token = target.token;
        entry.old_flat = level.flat_ids[target.token];
        std::vector<int> new_slots(m);
        for (int c = 0; c < m; ++c) {
            new_slots[c] = level.size();
            level.codewords.push_back(result.centroids[c]);
            level.flat_ids.push_back(next_flat);
            level.retired.push_back(0);
            entry.new_tokens.push_back(new_slots[c]);
            entry.new_flats.push_back(next_flat);
            ++next_flat;
        }
        level.retired[target.token] = 1;

        if (target.level < codebook.num_levels() - 1) {
            // Inner level: an item follows its (pre-split) child token's cluster.
            std::vector<int> cluster_of_child(codebook.levels[target.level + 1].size(), -1);
            for (size_t j = 0; j < instance.child_tokens.size(); ++j)
                cluster_of_child[instance.child_tokens[j]] = result.assignment[j];
            for (size_t i = 0; i < sids.size(); ++i) {
                if (sids[i].tokens[target.level] != target.token) continue;
                const int c = cluster_of_child[sids[i].tokens[target.level + 1]];
                if (c < 0) throw InvalidArgument("inconsistent-plan: item child missing from instance");
                out.sids[i].tokens[target.level] = new_slots[c];
            }
        } else {
            for (size_t j = 0; j < instance.child_items.size(); ++j)
                out.sids[instance.child_items[j]].tokens[target.level] = new_slots[result.assignment[j]];
        }
        out.lineage.push_back(std::move(entry));
    }

    out.codebook.vocab_size = next_flat;
    out.codebook.validate();
    return out;
}

void save_lineage_json(const std::vector<LineageEntry>& lineage, const std::string& path) {
    json doc = json::array();
    for (const LineageEntry& e : lineage) {
        json rec;
        rec["level"] = e.level;
        rec["old_token"] = e.old_token;
        rec["old_flat"] = e.old_flat;
        rec["new_tokens"] = e.new_tokens;
        rec["new_flats"] = e.new_flats;
        doc.push_back(std::move(rec));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<LineageEntry> load_lineage_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ParseError(path, 1, e.what());
    }
    std::vector<LineageEntry> lineage;
    for (const json& rec : doc) {
        LineageEntry e;
        e.level = rec.at("level").get<int>();
        e.old_token = rec.at("old_token").get<int>();
        e.old_flat = rec.at("old_flat").get<int>();
        e.new_tokens = rec.at("new_tokens").get<std::vector<int>>();
        e.new_flats = rec.at("new_flats").get<std::vector<int>>();
        lineage.push_back(std::move(e));
    }
    return lineage;
}

}  // namespace semid
