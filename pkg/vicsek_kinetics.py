#!/usr/bin/env python3
"""
vicsek-kinetics Command Line Interface
Simple wrapper script to run the experiment recipes
"""
import sys
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Import and run the experiments CLI
from src.experiments_cli import main

if __name__ == "__main__":
    sys.exit(main())
