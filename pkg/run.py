#!/usr/bin/env python3
"""
Entry point for the wavegenre command line
"""
import sys

from controllers.cli_controller import main

if __name__ == '__main__':
    sys.exit(main())
