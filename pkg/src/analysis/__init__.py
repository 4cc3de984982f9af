# This file makes the 'analysis' directory a Python package.
