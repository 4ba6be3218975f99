from ivrand.cli import main
import sys

sys.exit(main())
