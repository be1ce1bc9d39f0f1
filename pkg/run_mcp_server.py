#!/usr/bin/env python3
"""MCP Server entry point for crn-regimes from a source checkout."""

import sys
from pathlib import Path

# Add src directory to Python path
src_path = Path(__file__).parent / "src"
sys.path.insert(0, str(src_path))

from crn_regimes.mcp_server import main

if __name__ == "__main__":
    import asyncio
    asyncio.run(main())
