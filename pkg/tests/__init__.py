"""Tests for Oracle DDL RAG MCP Server."""
