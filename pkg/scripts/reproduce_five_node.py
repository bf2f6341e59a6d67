"""Mean AE/CE curves for CoDGraD and both DGD variants on the five-node preset.

    python3 scripts/reproduce_five_node.py --trials 100 --out-dir results/five-node
"""

import sys

from _common import main

if __name__ == "__main__":
    main("five-node", sys.argv[1:])
