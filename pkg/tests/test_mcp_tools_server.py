#!/usr/bin/env python3
"""
Test suite for the zero-stability MCP tools server

This simulates how an MCP client/agent would consume the tools,
ensuring every command is reachable and errors come back as text.
"""

import asyncio
import json
import os
import sys
from pathlib import Path
from unittest.mock import patch

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from mcp.types import TextContent, Tool

from zerostab_errors import GridError
from zerostab_mcp_tools_server import TOOL_SUBCOMMANDS, ZeroStabToolsServer


class TestZeroStabToolsServer:
    """Test suite simulating MCP client/agent usage patterns."""

    @pytest.fixture
    def server(self):
        return ZeroStabToolsServer()

    @pytest.mark.asyncio
    async def test_list_tools(self, server):
        """An agent first discovers the available tools."""
        tools = await server.handle_list_tools()

        assert len(tools) == 6
        assert all(isinstance(tool, Tool) for tool in tools)
        assert {tool.name for tool in tools} == set(TOOL_SUBCOMMANDS)

        for tool in tools:
            assert tool.description
            assert tool.inputSchema["type"] == "object"
            assert "properties" in tool.inputSchema

        analyze = next(tool for tool in tools if tool.name == "zerostab_analyze")
        assert "regularity" in analyze.inputSchema["properties"]
        assert analyze.inputSchema["properties"]["k"]["maximum"] == 6

    @pytest.mark.asyncio
    async def test_coefficients_tool(self, server):
        result = await server.handle_call_tool("zerostab_coefficients", {"k": 2, "exact": True})

        assert len(result) == 1
        assert isinstance(result[0], TextContent)
        report = json.loads(result[0].text)
        assert report["schema"] == 1
        assert report["rows"][0]["alpha"] == ["1/2", "-2", "3/2"]

    @pytest.mark.asyncio
    async def test_deflate_tool(self, server):
        result = await server.handle_call_tool("zerostab_deflate", {"alpha": "-1/3,3/2,-3,11/6"})
        report = json.loads(result[0].text)
        assert report["rows"][0]["gamma"] == ["1/3", "-7/6", "11/6"]

    @pytest.mark.asyncio
    async def test_analyze_tool(self, server):
        result = await server.handle_call_tool("zerostab_analyze", {"k": 3, "grid": "exp:c=2"})
        report = json.loads(result[0].text)
        assert report["method"] == "BDF3"
        assert report["ramp_up"]["n_star"] == 19

    @pytest.mark.asyncio
    async def test_simulate_tool(self, server):
        result = await server.handle_call_tool("zerostab_simulate", {"k": 2, "uniform": 20, "init": [1, 1]})
        report = json.loads(result[0].text)
        assert report["sup_u"] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.asyncio
    async def test_sweep_tool(self, server):
        result = await server.handle_call_tool(
            "zerostab_sweep", {"k": 2, "ratios": "2.5", "ns": "25,50,100,200"}
        )
        report = json.loads(result[0].text)
        assert report["verdict"] == "UNSTABLE"

    @pytest.mark.asyncio
    async def test_convergence_tool(self, server):
        result = await server.handle_call_tool(
            "zerostab_convergence", {"k": 1, "uniform": 10, "integrand": "monomial", "degree": 0}
        )
        report = json.loads(result[0].text)
        assert max(report["errors"]) < 1e-12

    @pytest.mark.asyncio
    async def test_unknown_tool(self, server):
        result = await server.handle_call_tool("zerostab_plot", {})
        assert result[0].text == "Unknown tool: zerostab_plot"

    @pytest.mark.asyncio
    async def test_validation_error(self, server):
        result = await server.handle_call_tool("zerostab_coefficients", {"k": 12})
        assert result[0].text.startswith("Error:")

    @pytest.mark.asyncio
    async def test_reserved_argument(self, server):
        """Arguments that clash with the tool's own command come back as an error."""
        result = await server.handle_call_tool("zerostab_coefficients", {"k": 2, "subcommand": "sweep"})
        assert len(result) == 1
        assert result[0].text.startswith("Error:")

    @pytest.mark.asyncio
    async def test_unexpected_failure(self, server):
        with patch("zerostab_mcp_tools_server.execute", side_effect=KeyError("alpha")):
            result = await server.handle_call_tool("zerostab_deflate", {"alpha": "1,-1"})
        assert result[0].text.startswith("Error:")

    @pytest.mark.asyncio
    async def test_domain_error(self, server):
        result = await server.handle_call_tool("zerostab_analyze", {"alpha": "-1,0,1"})
        assert result[0].text.startswith("Error:")
        assert "strongly stable" in result[0].text

    @pytest.mark.asyncio
    async def test_tool_error_handling(self, server):
        # Force an error from inside a command handler
        with patch("zerostab_mcp_tools_server.execute", side_effect=GridError("bad grid")):
            result = await server.handle_call_tool("zerostab_coefficients", {"k": 2})
        assert result[0].text == "Error: bad grid"

    @pytest.mark.asyncio
    async def test_concurrent_tool_calls(self, server):
        """Several agents may call tools at the same time."""
        calls = [
            server.handle_call_tool("zerostab_coefficients", {"k": k, "exact": True})
            for k in range(1, 7)
        ]
        results = await asyncio.gather(*calls)
        for k, result in enumerate(results, start=1):
            assert json.loads(result[0].text)["method"] == f"BDF{k}"

    @pytest.mark.asyncio
    async def test_mcp_server_integration(self, server):
        """The underlying MCP server is set up with our name."""
        assert server.server.name == "zerostab-tools"

    def test_logging_configuration(self):
        """Test that logging is configured correctly for production."""
        with patch.dict(os.environ, {'MCP_SERVER_MODE': 'production'}):
            # Re-import to trigger logging setup
            import importlib
            import zerostab_mcp_tools_server
            module = importlib.reload(zerostab_mcp_tools_server)

            assert module.logger.name == "zerostab_mcp_tools_server"
            assert hasattr(module, "ZeroStabToolsServer")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
