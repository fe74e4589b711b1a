import sys

from bev_domain_adapt.cli import main

sys.exit(main())
