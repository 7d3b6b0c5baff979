import sys

from dotenv import load_dotenv

load_dotenv()

if __name__ == "__main__":
    from src.cli import main

    sys.exit(main())
