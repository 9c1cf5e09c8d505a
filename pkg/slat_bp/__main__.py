import sys

from slat_bp.cli import main

sys.exit(main())
