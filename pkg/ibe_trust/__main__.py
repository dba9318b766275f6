from ibe_trust.cli import main

raise SystemExit(main())
