from qsmooth.cli import main

main()
