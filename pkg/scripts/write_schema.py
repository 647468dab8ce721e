#!/usr/bin/env python3
"""Regenerate configs/schema.json from the experiment parameter dataclasses."""

import json
from pathlib import Path

from cranopt.harness import config_schema

path = Path(__file__).resolve().parent.parent / "configs" / "schema.json"
path.write_text(json.dumps(config_schema(), indent=2) + "\n", encoding="utf-8")
print(f"wrote {path}")
