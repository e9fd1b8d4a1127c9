from mtpenergy.cli import main

main()
