"""MCP server exposing regime classification, fixed points, fast laws and limiting ODEs."""

import mcp.types as types
from mcp.server import Server, NotificationOptions
from mcp.server.models import InitializationOptions
import mcp.server.stdio

from . import __version__
from .mcp_tools import MCPToolHandlers
from .model import RATE_NAMES, Regime


app = Server("crn-regimes")
tool_handlers = MCPToolHandlers()


_RATE_PROPERTIES = {name: {"type": "number", "exclusiveMinimum": 0} for name in RATE_NAMES}

_NETWORK_PROPERTIES = {
    "params": {
        "type": "object",
        "description": "The eight rate constants. They may also be given at the top level.",
        "properties": _RATE_PROPERTIES,
    },
    "C_M": {"type": "number", "description": "M0/N, must be > 1."},
    "C_U": {"type": "number", "description": "U0/N, must be > 0."},
    "regulated": {
        "type": "boolean",
        "description": "Include the sequestration channels (default true).",
        "default": True,
    },
}

_REGIME_PROPERTY = {
    "type": "string",
    "enum": [r.value for r in Regime if r is not Regime.BOUNDARY],
    "description": "Regime to use. Classified from the parameters if omitted.",
}


@app.list_tools()
async def handle_list_tools() -> list[types.Tool]:
    return [
        types.Tool(
            name="classify",
            description=(
                "Classify the network's asymptotic regime from its rates and ratios. "
                "Returns the condition value, the fixed point of the limiting ODE and its stability."
            ),
            inputSchema={
                "type": "object",
                "properties": dict(_NETWORK_PROPERTIES),
                "required": ["C_M", "C_U"],
            },
        ),
        types.Tool(
            name="fixed_point",
            description="Fixed point of a regime's limiting ODE with eigenvalue real parts.",
            inputSchema={
                "type": "object",
                "properties": {**_NETWORK_PROPERTIES, "regime": _REGIME_PROPERTY},
                "required": ["C_M", "C_U"],
            },
        ),
        types.Tool(
            name="fast_distribution",
            description=(
                "Invariant law of the fast coordinates with the slow variables frozen. "
                "Returns mean, covariance, truncation tail and the heaviest atoms."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    **_NETWORK_PROPERTIES,
                    "regime": _REGIME_PROPERTY,
                    "slow": {
                        "type": "array",
                        "items": {"type": "number"},
                        "description": "Scaled slow variables, in the order of the regime's ODE state.",
                    },
                    "max_atoms": {
                        "type": "integer",
                        "description": "Number of atoms to list (default 20).",
                        "default": 20,
                    },
                },
                "required": ["C_M", "C_U", "slow"],
            },
        ),
        types.Tool(
            name="integrate_limit",
            description=(
                "Integrate a regime's limiting ODE with RK4 and return the path and the "
                "scaled production limit at evenly spaced times."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    **_NETWORK_PROPERTIES,
                    "regime": _REGIME_PROPERTY,
                    "horizon": {"type": "number", "minimum": 0},
                    "x0": {
                        "type": "array",
                        "items": {"type": "number"},
                        "description": "Initial slow state. Defaults to the fixed point.",
                    },
                    "dt": {"type": "number", "description": "RK4 step. Defaults to 1e-3 over the largest rate."},
                    "samples": {
                        "type": "integer",
                        "description": "Number of returned time points (default 11).",
                        "default": 11,
                    },
                },
                "required": ["C_M", "C_U", "horizon"],
            },
        ),
        types.Tool(
            name="list_runs",
            description="List recorded verification runs, newest first.",
            inputSchema={
                "type": "object",
                "properties": {
                    "limit": {
                        "type": "integer",
                        "description": "Max number of runs to return (default 10).",
                        "default": 10,
                    },
                    "regime": {"type": "string", "description": "Only runs of this regime."},
                    "home": {"type": "string", "description": "Registry directory. Defaults to CRN_REGIMES_HOME."},
                },
            },
        ),
    ]


@app.call_tool()
async def handle_call_tool(name: str, arguments: dict) -> list[types.TextContent]:
    arguments = arguments or {}
    if name == "classify":
        return await tool_handlers.handle_classify(arguments)
    elif name == "fixed_point":
        return await tool_handlers.handle_fixed_point(arguments)
    elif name == "fast_distribution":
        return await tool_handlers.handle_fast_distribution(arguments)
    elif name == "integrate_limit":
        return await tool_handlers.handle_integrate_limit(arguments)
    elif name == "list_runs":
        return await tool_handlers.handle_list_runs(arguments)
    else:
        raise ValueError(f"Unknown tool: {name}")


async def main():
    async with mcp.server.stdio.stdio_server() as (read_stream, write_stream):
        await app.run(
            read_stream,
            write_stream,
            InitializationOptions(
                server_name="crn-regimes",
                server_version=__version__,
                capabilities=app.get_capabilities(
                    notification_options=NotificationOptions(),
                    experimental_capabilities={},
                ),
            ),
        )


def run() -> None:
    """Sync entry point for pip-installed console script."""
    import asyncio
    asyncio.run(main())


if __name__ == "__main__":
    run()
