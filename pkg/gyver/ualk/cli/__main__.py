import sys

from gyver.ualk.cli.main import main

sys.exit(main())
