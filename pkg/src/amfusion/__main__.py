import sys

from src.amfusion.cli import main

sys.exit(main())
