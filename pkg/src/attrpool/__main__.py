import sys

from attrpool.cli import main

sys.exit(main())
