"""Tests for the onstar package.""" 