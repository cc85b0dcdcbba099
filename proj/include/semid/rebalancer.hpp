#pragma once

#include <cstdint>
#include <vector>

#include "semid/popularity.hpp"
#include "semid/tokenizer.hpp"

namespace semid {

// One over-popular token to split into m_new new tokens.
struct SplitTarget {
    int level = 0;
    int token = 0;
    int m_new = 2;
};

struct SplitPlan {
    std::vector<SplitTarget> targets;
    double lambda_scaled = 1.0;  // dimensionless multiplier, scaled per instance
    double ratio = 0.10;
};

// The redistribution instance for one target: each child contributes its mean
// residual, a distance weight, and a popularity mass for the balance term.
// For level-L targets each member item is its own child (weight f_i).
struct SplitInstance {
    std::vector<Vec> means;
    std::vector<double> weights;       // n_j
    std::vector<double> pops;          // conditional popularity
    std::vector<int> child_tokens;     // level-(l+1) token slot, or -1 at level L
    std::vector<int64_t> child_items;  // item id at level L, or -1 otherwise
};

struct SplitResult {
    std::vector<int> assignment;       // child index -> cluster in [0, M)
    std::vector<Vec> centroids;        // one per new token
    std::vector<double> cluster_pops;  // popularity of each new token
    double objective = 0.0;            // distance term + lambda * L_bal
    double distance_term = 0.0;
    double balance_term = 0.0;         // L_bal (unscaled)
    double lambda = 0.0;               // the absolute lambda used
    int iterations = 0;
};

// L_bal = sum_m (P_m - Pbar)^2 with P_m = sum of assigned pops, Pbar = total/M.
double balance_loss(const std::vector<int>& assignment, const std::vector<double>& pops, int m);

// Per level: top ceil(ratio*K_active) tokens by popularity; M = clamp(floor(
// P/Pbar), 2, m_cap) with Pbar the mean active-token popularity of the level.
// Tokens with fewer than 2 children (or < 2 member items at level L) are
// skipped as unsplittable, as are zero-popularity tokens.
SplitPlan select_split_targets(const TokenStats& stats, const ChildMap& child_map,
                               const std::vector<SemanticId>& sids, const Codebook& codebook,
                               double ratio, int m_cap, double lambda_scaled = 1.0,
                               const std::vector<int>& levels = {});

// Alternating minimization of
//   sum_m sum_j z_j[m] * n_j * ||rbar_j - mu_m||^2 + lambda * L_bal
// with lambda = lambda_scaled * mean_dist / (Pbar^2 * M). The assignment step
// is greedy sequential single-child descent plus pairwise exchanges on the
// full objective (children visited by descending n_j), rejecting moves that
// would empty a cluster; within a run the objective is non-increasing across
// accepted moves and centroid steps. Runs start from a seeding portfolio --
// the M most popular children one per cluster, largest-pops-first onto the
// lightest cluster, a plain weighted K-means of the child means, and a few
// D^2-sampled restarts -- and the best local fixpoint wins. L_bal couples
// assignments, so single-seed descent strands in basins the portfolio
// escapes.
SplitResult regularized_kmeans_split(const SplitInstance& instance, int m, double lambda_scaled,
                                     uint64_t seed, int max_iters = 100);

// The absolute lambda regularized_kmeans_split derives from an instance.
double split_lambda(const SplitInstance& instance, int m, double lambda_scaled);

// Exact objective of a given assignment (centroids at weighted means), used
// by tests and the brute-force oracle path.
double split_objective(const SplitInstance& instance, const std::vector<int>& assignment, int m,
                       double lambda);

// Builds the redistribution instance for one target from pre-split state.
SplitInstance build_split_instance(const SplitTarget& target, const ChildStatsTable& stats,
                                   const ChildMap& child_map, const std::vector<SemanticId>& sids,
                                   const ResidualTrace& trace, const FrequencyTable& freq,
                                   const Codebook& codebook);

// Records which new tokens replaced which retired token (flat ids).
struct LineageEntry {
    int level = 0;
    int old_token = 0;
    int old_flat = 0;
    std::vector<int> new_tokens;  // token slots within the level
    std::vector<int> new_flats;
};

struct RebalanceOutcome {
    Codebook codebook;
    std::vector<SemanticId> sids;
    std::vector<LineageEntry> lineage;
};

// Applies all splits as one transaction: retired slots stay in the vocabulary
// (masked), new tokens are appended with fresh flat ids, and each affected
// item's level-l token is rewritten to its child's cluster. All decisions
// read pre-split state, so targets at different levels compose.
RebalanceOutcome apply_split(const Codebook& codebook, const std::vector<SemanticId>& sids,
                             const SplitPlan& plan, const std::vector<SplitTarget>& targets,
                             const std::vector<SplitInstance>& instances,
                             const std::vector<SplitResult>& results);

void save_lineage_json(const std::vector<LineageEntry>& lineage, const std::string& path);
std::vector<LineageEntry> load_lineage_json(const std::string& path);

}  // namespace semid
