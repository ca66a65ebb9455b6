import sys

from heact.cli import main

sys.exit(main())
