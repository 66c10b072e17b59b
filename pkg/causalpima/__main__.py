# Local
try:
    from causalpima.causalpima import main
except ImportError:
    from causalpima import main

if __name__ == "__main__":
    raise SystemExit(main())
