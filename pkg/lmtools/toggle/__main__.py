import sys

from toggle.cli import main

sys.exit(main())
