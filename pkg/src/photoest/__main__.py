import sys

from photoest.cli import main

sys.exit(main())
