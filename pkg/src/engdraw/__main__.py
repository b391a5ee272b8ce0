from __future__ import annotations

import sys

from engdraw.cli import main

sys.exit(main())
