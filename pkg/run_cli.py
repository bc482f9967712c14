#!/usr/bin/env python3
"""
Startup script for the late temporal pooling toolkit
Sets up Python paths and dispatches to the command-line interface

    python run_cli.py gen --task order --n 2000 --t 8 --d 16 --seed 7 --out data/train.tpf
    python run_cli.py train --config data/configs/train_order_bert.json
"""

import sys
from pathlib import Path

# Get project paths
project_root = Path(__file__).parent
code_dir = project_root / "code"

# Add code directory to Python path
sys.path.insert(0, str(code_dir))

from pooling_cli import main

if __name__ == "__main__":
    sys.exit(main())
