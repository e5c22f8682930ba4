"""Shared record of acceptance verdicts, printed in the terminal summary."""
from __future__ import annotations

import pytest

VERDICTS = pytest.StashKey[dict]()
