#!/usr/bin/env python3
"""
timbre-lab command line application
Main entry point for corpus synthesis, training and evaluation
"""
import sys

from timbre_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
