import sys

from isacsim.cli import main

sys.exit(main())
