from ccgym.core.app import main


raise SystemExit(main())
