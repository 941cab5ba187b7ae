import sys

from prefshift.harness_cli import main

sys.exit(main())
