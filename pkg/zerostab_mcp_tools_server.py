#!/usr/bin/env python3
"""
Zero-Stability MCP Tools Server

This MCP server exposes the zerostab commands (coefficient tables, deflation,
stability reports, recursion sweeps and convergence studies) as tools, so an
agent can request them and receive the same JSON reports the CLI prints.
"""

import asyncio
import logging
import os
from pathlib import Path
from typing import Any, Dict, List

from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool

from zerostab_cli import Command, execute

# Set up logging - use file logging when running as MCP server to avoid stdio conflicts
if os.environ.get('MCP_SERVER_MODE') == 'production':
    # Log to file in production MCP mode
    log_file = Path(__file__).parent / 'zerostab_mcp_tools_server.log'
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        filename=str(log_file),
        filemode='a'
    )
else:
    # Console logging for testing/debugging
    logging.basicConfig(
        level=logging.DEBUG,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
logger = logging.getLogger(__name__)

TOOL_TIMEOUT = 600

METHOD_PROPERTIES = {
    "k": {
        "type": "integer",
        "minimum": 1,
        "maximum": 6,
        "description": "Step number of the BDF method"
    },
    "exact": {
        "type": "boolean",
        "description": "Use exact rational arithmetic (coefficients are returned as strings like '3/2')"
    },
    "normalization": {
        "type": "string",
        "enum": ["classical", "unit-beta"],
        "description": "Row scaling: 'classical' writes two-step rows with beta_2 = (1+r)/2"
    },
}

GRID_PROPERTIES = {
    "grid": {
        "type": "string",
        "description": "Grid map as family:params, e.g. 'exp:c=2', 'sigmoid:a=0.5,w=0.1', 'identity'"
    },
    "ratios": {
        "type": "string",
        "description": "Comma separated step ratios; a single ratio with n gives a constant ratio grid"
    },
    "uniform": {
        "type": "integer",
        "minimum": 1,
        "description": "Uniform grid with this many steps"
    },
    "n": {
        "type": "integer",
        "minimum": 1,
        "description": "Number of steps when realising a grid map"
    },
}

SIZE_PROPERTIES = {
    "nmin": {"type": "integer", "minimum": 1, "description": "Smallest grid size"},
    "doublings": {"type": "integer", "minimum": 0, "description": "Number of N doublings"},
    "nmax": {"type": "integer", "minimum": 1, "description": "Largest grid size (alternative to doublings)"},
    "ns": {"type": "string", "description": "Explicit comma separated grid sizes"},
}

TOOL_SUBCOMMANDS = {
    "zerostab_coefficients": "coeffs",
    "zerostab_deflate": "deflate",
    "zerostab_analyze": "analyze",
    "zerostab_simulate": "simulate",
    "zerostab_sweep": "sweep",
    "zerostab_convergence": "convergence",
}


class ZeroStabToolsServer:
    def __init__(self):
        logger.info("Initializing zero-stability tools server")
        self.server = Server("zerostab-tools")

        # Register tool handlers
        @self.server.list_tools()
        async def list_tools_handler() -> List[Tool]:
            return await self.handle_list_tools()

        @self.server.call_tool()
        async def call_tool_handler(name: str, arguments: Dict[str, Any]) -> List[TextContent]:
            return await self.handle_call_tool(name, arguments)

    async def handle_list_tools(self) -> List[Tool]:
        """Handle list_tools request."""
        logger.debug("Listing tools")
        tools = []

        tools.append(Tool(
            name="zerostab_coefficients",
            description="Variable step BDF coefficient rows (alpha, beta) for given step ratios or a grid",
            inputSchema={
                "type": "object",
                "properties": {**METHOD_PROPERTIES, **GRID_PROPERTIES},
                "required": ["k"]
            }
        ))

        tools.append(Tool(
            name="zerostab_deflate",
            description="Deflate an alpha row by the backward difference, giving the extraneous row gamma",
            inputSchema={
                "type": "object",
                "properties": {
                    "alpha": {
                        "type": "string",
                        "description": "Comma separated alpha row, oldest coefficient first, e.g. '1/2,-2,3/2'"
                    },
                    "exact": METHOD_PROPERTIES["exact"],
                },
                "required": ["alpha"]
            }
        ))

        tools.append(Tool(
            name="zerostab_analyze",
            description="Stability report: extraneous roots, C0, S_j norms, w_max and the minimal step count N*",
            inputSchema={
                "type": "object",
                "properties": {
                    **METHOD_PROPERTIES,
                    **GRID_PROPERTIES,
                    "regularity": {
                        "type": "number",
                        "minimum": 0,
                        "description": "Use this value of sup|phi'/phi| instead of a grid map"
                    },
                    "alpha": {
                        "type": "string",
                        "description": "Analyse this constant step alpha row instead of BDF-k"
                    },
                },
                "required": []
            }
        ))

        tools.append(Tool(
            name="zerostab_simulate",
            description="Run the homogeneous recursion once and report sup|y|, sup|u| and the growth rate",
            inputSchema={
                "type": "object",
                "properties": {
                    **METHOD_PROPERTIES,
                    **GRID_PROPERTIES,
                    "init": {
                        "type": "string",
                        "description": "Comma separated start values y_0..y_{k-1} (default alternating +-1)"
                    },
                },
                "required": ["k"]
            }
        ))

        tools.append(Tool(
            name="zerostab_sweep",
            description="Boundedness verdict (STABLE/UNSTABLE) from recursion runs over N doublings",
            inputSchema={
                "type": "object",
                "properties": {
                    **METHOD_PROPERTIES,
                    **GRID_PROPERTIES,
                    **SIZE_PROPERTIES,
                    "seed": {"type": "integer", "description": "Seed of the random start vectors"},
                    "jobs": {"type": "integer", "minimum": 1, "description": "Parallel runs"},
                },
                "required": ["k"]
            }
        ))

        tools.append(Tool(
            name="zerostab_convergence",
            description="Observed order of BDF-k on the quadrature problem y' = f(t) over a grid family",
            inputSchema={
                "type": "object",
                "properties": {
                    **METHOD_PROPERTIES,
                    **GRID_PROPERTIES,
                    **SIZE_PROPERTIES,
                    "integrand": {
                        "type": "string",
                        "enum": ["exp", "cos", "monomial"],
                        "description": "Integrand f; 'monomial' is (d+1) t^d"
                    },
                    "degree": {"type": "integer", "minimum": 0, "description": "Degree d of the monomial"},
                },
                "required": ["k"]
            }
        ))

        logger.debug(f"Returning {len(tools)} tools")
        return tools

    async def handle_call_tool(self, name: str, arguments: Dict[str, Any]) -> List[TextContent]:
        """Handle tool calls."""
        logger.debug(f"Calling tool: {name} with arguments: {arguments}")

        subcommand = TOOL_SUBCOMMANDS.get(name)
        if subcommand is None:
            return [TextContent(type="text", text=f"Unknown tool: {name}")]

        try:
            command = Command(subcommand=subcommand, **(arguments or {}))
            output = await asyncio.wait_for(asyncio.to_thread(execute, command), timeout=TOOL_TIMEOUT)
            return [TextContent(type="text", text=output.render("json"))]
        except asyncio.TimeoutError:
            return [TextContent(type="text", text=f"Error: {name} timed out after {TOOL_TIMEOUT} seconds")]
        except Exception as e:
            logger.error(f"Error handling tool {name}: {e}")
            return [TextContent(type="text", text=f"Error: {str(e)}")]

    async def run(self):
        """Run the MCP server."""
        async with stdio_server() as (read_stream, write_stream):
            initialization_options = self.server.create_initialization_options()
            await self.server.run(
                read_stream,
                write_stream,
                initialization_options,
                raise_exceptions=True
            )


async def main():
    """Main entry point."""
    tools_server = ZeroStabToolsServer()
    await tools_server.run()


if __name__ == "__main__":
    asyncio.run(main())
