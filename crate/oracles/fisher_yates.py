"""Reference seeded shuffle, written from the algorithm definitions only.

ChaCha8 keystream (64-bit block counter, zero stream id), seeded from a u64
through PCG32 the way `SeedableRng::seed_from_u64` does, and inclusive range
sampling by widening multiply with the leading-zeros rejection zone.
"""

import sys

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF


def pcg32_seed(state):
    mul, inc = 6364136223846793005, 11634580027462260723
    out = []
    for _ in range(8):
        state = (state * mul + inc) & MASK64
        xorshifted = (((state >> 18) ^ state) >> 27) & MASK32
        rot = state >> 59
        out.append(((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & MASK32)
    return out  # eight little-endian key words


def rotl(x, n):
    return ((x << n) | (x >> (32 - n))) & MASK32


def quarter(s, a, b, c, d):
    s[a] = (s[a] + s[b]) & MASK32; s[d] = rotl(s[d] ^ s[a], 16)
    s[c] = (s[c] + s[d]) & MASK32; s[b] = rotl(s[b] ^ s[c], 12)
    s[a] = (s[a] + s[b]) & MASK32; s[d] = rotl(s[d] ^ s[a], 8)
    s[c] = (s[c] + s[d]) & MASK32; s[b] = rotl(s[b] ^ s[c], 7)


def chacha_block(key, counter, rounds=8):
    init = [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574] + key + [
        counter & MASK32, counter >> 32, 0, 0]
    s = init[:]
    for _ in range(rounds // 2):
        quarter(s, 0, 4, 8, 12); quarter(s, 1, 5, 9, 13)
        quarter(s, 2, 6, 10, 14); quarter(s, 3, 7, 11, 15)
        quarter(s, 0, 5, 10, 15); quarter(s, 1, 6, 11, 12)
        quarter(s, 2, 7, 8, 13); quarter(s, 3, 4, 9, 14)
    return [(x + y) & MASK32 for x, y in zip(s, init)]


class Rng:
    def __init__(self, seed):
        self.key = pcg32_seed(seed)
        self.counter = 0
        self.words = []

    def u32(self):
        if not self.words:
            self.words = chacha_block(self.key, self.counter)
            self.counter += 1
        return self.words.pop(0)

    def u64(self):
        lo = self.u32()
        hi = self.u32()
        return lo | (hi << 32)

    def below_inclusive(self, high):
        rng = (high + 1) & MASK64
        lz = 64 - rng.bit_length()
        zone = ((rng << lz) & MASK64) - 1
        while True:
            v = self.u64()
            m = v * rng
            hi, lo = m >> 64, m & MASK64
            if lo <= zone:
                return hi


def shuffle(items, seed):
    items = list(items)
    rng = Rng(seed)
    for i in range(len(items) - 1, 0, -1):
        j = rng.below_inclusive(i)
        items[i], items[j] = items[j], items[i]
    return items


if __name__ == "__main__":
    seed = int(sys.argv[1])
    print(" ".join(shuffle(sys.argv[2:], seed)))
