import sys
from pathlib import Path

# In-repo runs import the package from python/ with the CMake-built extension
# copied alongside; an installed wheel takes priority if present.
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
