"""Application side of the test bed: process supervision and bundled test apps."""
