"""Reference implementations written independently of the package."""


def crc_bitwise(data: bytes) -> int:
    """CRC-16 by long division, one bit at a time, reflected polynomial 0x8408, initial value 0."""
    reg = 0
    for byte in data:
        for i in range(8):
            fb = (reg ^ (byte >> i)) & 1
            reg >>= 1
            if fb:
                reg ^= 0x8408
    return reg


def brute_force_decode(chips, table):
    """Nearest PN entry by explicit chip comparison; ties go to the lowest symbol."""
    dists = [sum(int(a != b) for a, b, m in zip(chips, seq, table.mask) if m) for seq in table.sequences]
    best = min(range(16), key=lambda s: (dists[s], s))
    return best, dists[best]
