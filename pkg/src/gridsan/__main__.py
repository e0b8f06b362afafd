import sys

from gridsan.cli import main

sys.exit(main())
