import sys

from iot_compression_bench.cli import main

sys.exit(main())
