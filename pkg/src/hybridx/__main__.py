import sys

from hybridx.cli import main

sys.exit(main())
