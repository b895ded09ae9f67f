from decaymem.harness.cli import main

raise SystemExit(main())
