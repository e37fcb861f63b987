import sys
from pathlib import Path

# Let test modules import the shared oracles regardless of invocation dir.
sys.path.insert(0, str(Path(__file__).parent))
