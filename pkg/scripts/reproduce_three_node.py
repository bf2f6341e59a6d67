"""Mean AE/CE curves for CoDGraD and both DGD variants on the three-node preset.

    python3 scripts/reproduce_three_node.py --trials 100 --out-dir results/three-node
"""

import sys

from _common import main

if __name__ == "__main__":
    main("three-node", sys.argv[1:])
