"""Synthetic package exports for desk runs and tests."""

from __future__ import annotations

import random

_STEMS = [
    "openssl", "gnutls", "nss", "libgcrypt", "libsodium", "gnupg2", "openssh", "krb5",
    "curl", "wget", "bash", "coreutils", "vim", "emacs", "python3", "perl", "glibc",
    "zlib", "libxml2", "sqlite", "nginx", "httpd", "postfix", "dovecot", "strongswan",
    "wireguard-tools", "cryptsetup", "p11-kit", "ca-certificates", "gzip", "tar", "sed",
]
_SUFFIXES = ["", "-libs", "-devel", "-tools", "-doc", "-utils", "-common", "-plugins"]
_ARCHES = ["x86_64", "noarch", "i686", "aarch64"]


def synthetic_export(n_unique: int = 190, n_duplicates: int = 10, seed: int = 0) -> str:
    """TSV export with ``n_unique`` distinct names plus ``n_duplicates`` older versions."""
    rng = random.Random(seed)
    names: list[str] = []
    i = 0
    while len(names) < n_unique:
        stem = _STEMS[i % len(_STEMS)]
        suffix = _SUFFIXES[(i // len(_STEMS)) % len(_SUFFIXES)]
        tag = i // (len(_STEMS) * len(_SUFFIXES))
        names.append(f"{stem}{suffix}" + (f"{tag}" if tag else ""))
        i += 1

    lines = []
    for name in names:
        major, minor = rng.randint(1, 9), rng.randint(0, 20)
        arch = rng.choice(_ARCHES)
        deps = ",".join(rng.sample(_STEMS, rng.randint(0, 4)))
        lines.append(
            f"{name}-{major}.{minor}.0-1.fc40.{arch}\t\tSynthetic package {name} version {major}.{minor}\t{deps}"
        )
    for name in rng.sample(names, n_duplicates):
        lines.append(f"{name}-0.1.0-1.fc39.x86_64\t\tOld description of {name}\t")
    rng.shuffle(lines)
    return "\n".join(lines) + "\n"
