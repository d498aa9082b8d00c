"""Optional numba acceleration with a pure-Python fallback."""

try:
    import numba

    njit = numba.njit
except Exception:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f
        return deco
