# ClickCFA library package; the version lives in assets.utilities
