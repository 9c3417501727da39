#!/usr/bin/env python3
"""
Run the ParaGraph command line from a source checkout.
"""

import os
import sys

# Add the current directory to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from paragraph_pipeline.cli import main

if __name__ == "__main__":
    sys.exit(main())
