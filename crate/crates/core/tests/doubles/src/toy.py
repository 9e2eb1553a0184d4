import sys

def parse_header(data):
    raise ValueError("bad magic")
def lookup(key):
    return TABLE[key]
    return lookup(data)
TABLE = {}

    load_table(data)

def main(path):
    parse_header(data)


main(sys.argv[1])
