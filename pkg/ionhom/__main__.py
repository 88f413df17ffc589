from ionhom.main import main

main()
