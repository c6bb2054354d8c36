import sys

from coarse_lab import main

sys.exit(main())
