# Tool version embedded in every artifact header and session log.
VERSION = "0.4.0"

# On-disk container format; bump when header fields or blob layouts change.
FORMAT_VERSION = 1
