import itertools
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cryptovote.errors import EmptyCorpusError, NormalizationError
from cryptovote.ingest import (
    PackageRecord,
    compare_versions,
    dedupe,
    normalize_name,
    parse_package_export,
    split_nevra,
)
from cryptovote.synthetic import synthetic_export

# Hand-split NEVRA strings: (raw, name). Split right-to-left: arch, release, version, name.
NEVRA_TABLE = [
    ("openssl-3.2.1-1.fc40.x86_64", "openssl"),
    ("openssl", "openssl"),
    ("python3-cryptography-42.0.5-1.fc40.noarch", "python3-cryptography"),
    ("openssl-libs-1:3.2.1-2.fc40.x86_64", "openssl-libs"),
    ("gnutls-3.8.5-1.fc40.i686", "gnutls"),
    ("nss-3.101.0-1.fc40.aarch64", "nss"),
    ("kernel-6.8.9-300.fc40.x86_64", "kernel"),
    ("glibc-2.39-15.fc40.x86_64", "glibc"),
    ("glibc-langpack-en-2.39-15.fc40.x86_64", "glibc-langpack-en"),
    ("perl-Crypt-OpenSSL-RSA-0.33-10.fc40.x86_64", "perl-Crypt-OpenSSL-RSA"),
    ("rust-ring-devel-0.17.8-1.fc40.noarch", "rust-ring-devel"),
    ("golang-x-crypto-devel-0.22.0-1.fc40.noarch", "golang-x-crypto-devel"),
    ("libgcrypt-1.10.3-3.fc40.s390x", "libgcrypt"),
    ("libsodium-1.0.19-4.fc40.ppc64le", "libsodium"),
    ("wireguard-tools-1.0.20210914-6.fc40.armv7hl", "wireguard-tools"),
    ("openssh-server-9.6p1-1.fc40.x86_64", "openssh-server"),
    ("gnupg2-2.4.4-1.fc40.src", "gnupg2"),
    ("ca-certificates-2024.2.69_v8.0.401-1.0.fc40.noarch", "ca-certificates"),
    ("krb5-libs-1.21.2-5.fc40.x86_64", "krb5-libs"),
    ("p11-kit-trust-0.25.3-4.fc40.x86_64", "p11-kit-trust"),
    ("python3-3.12.3-2.fc40.x86_64", "python3"),
    ("python3-libs-3.12.3-2.fc40.x86_64", "python3-libs"),
    ("java-21-openjdk-21.0.3.0.9-1.fc40.x86_64", "java-21-openjdk"),
    ("xorg-x11-server-Xorg-21.1.13-1.fc40.x86_64", "xorg-x11-server-Xorg"),
    ("code-1.89.1-1715060508.el8.x86_64", "code"),
    ("VirtualBox-7.0-7.0.18_162988_fedora40-1.x86_64", "VirtualBox-7.0"),
    ("docker-ce-3:26.1.3-1.fc40.x86_64", "docker-ce"),
    ("containerd.io-1.6.32-3.1.fc40.x86_64", "containerd.io"),
    ("ffmpeg-libs-6.1.1-12.fc40.x86_64", "ffmpeg-libs"),
    ("mesa-dri-drivers-24.0.7-1.fc40.i686", "mesa-dri-drivers"),
    ("cryptsetup-2.7.2-1.fc40.x86_64", "cryptsetup"),
    ("strongswan-5.9.14-1.fc40.x86_64", "strongswan"),
    ("bash-5.2.26-3.fc40.x86_64", "bash"),
    ("bash-5.2.26-3.fc40", "bash"),
    ("bash-5.2.26-3", "bash"),
    ("zlib-ng-compat-2.1.6-3.fc40.x86_64", "zlib-ng-compat"),
    ("libxcrypt-4.4.36-5.fc40.x86_64", "libxcrypt"),
    ("qt6-qtbase-6.7.0-3.fc40.x86_64", "qt6-qtbase"),
    ("libreoffice-core-1:24.2.3.2-1.fc40.x86_64", "libreoffice-core"),
    ("texlive-base-11:20230311-85.fc40.x86_64", "texlive-base"),
    ("foo-1.0-1.fc40.weirdarch", "foo"),
    ("python3-pyOpenSSL-24.1.0-1.fc40.noarch", "python3-pyOpenSSL"),
    ("nodejs-20.12.2-1.fc40.x86_64", "nodejs"),
    ("nodejs-libs-20.12.2-1.fc40.x86_64", "nodejs-libs"),
    ("systemd-255.6-1.fc40.x86_64", "systemd"),
    ("tpm2-tss-4.1.0-1.fc40.x86_64", "tpm2-tss"),
    ("tpm2-tools", "tpm2-tools"),
    ("lib64-stub.x86_64", "lib64-stub"),
    ("sha3sum-0.1-1.noarch", "sha3sum"),
    ("mozilla-nss-tools", "mozilla-nss-tools"),
]


def test_nevra_table_has_fifty_entries():
    assert len(NEVRA_TABLE) == 50


@pytest.mark.parametrize("raw,expected", NEVRA_TABLE)
def test_normalize_name_table(raw, expected):
    assert normalize_name(raw) == expected


def test_split_keeps_epoch_and_unknown_arch():
    assert split_nevra("openssl-libs-1:3.2.1-2.fc40.x86_64") == ("openssl-libs", "1:3.2.1", "2.fc40", "x86_64")
    assert split_nevra("foo-1.0-1.fc40.weirdarch") == ("foo", "1.0", "1.fc40.weirdarch", None)


@pytest.mark.parametrize("bad", ["", "   ", "-1-2", "--", "..."])
def test_normalize_rejects_malformed(bad):
    with pytest.raises(NormalizationError) as err:
        normalize_name(bad)
    assert repr(bad) in str(err.value)


name_text = st.text(alphabet="abcxyz0123456789-._:", min_size=1, max_size=30)


@given(name_text)
def test_normalize_is_idempotent(raw):
    try:
        once = normalize_name(raw)
    except NormalizationError:
        return
    assert normalize_name(once) == once


@pytest.mark.parametrize("arch", ["x86_64", "i686", "aarch64", "noarch"])
def test_normalized_names_carry_no_arch_or_version_tail(arch):
    name = normalize_name(f"libfoo-bar-2.4.1-3.fc40.{arch}")
    assert not name.endswith("." + arch)
    assert name == "libfoo-bar"


# -- export parsing -----------------------------------------------------------


def test_parse_three_entries():
    text = (
        "openssl-3.2.1-1.fc40.x86_64\t3.2.1\tTLS toolkit\tglibc,zlib\n"
        "bash-5.2.26-3.fc40.x86_64\t\tThe GNU shell\t\n"
        "vim\t9.1\tEditor\tlibacl\n"
    )
    records, summary = parse_package_export(text)
    assert [r.name for r in records] == ["openssl", "bash", "vim"]
    assert summary.dropped_malformed == 0
    assert summary.total_raw == 3
    assert records[0].dependencies == ("glibc", "zlib")
    assert records[1].version == "5.2.26-3.fc40"


def test_parse_counts_missing_name():
    text = "openssl\t1\tTLS\t\n\t2.0\tno name here\t\nbash\t5\tshell\t\n"
    records, summary = parse_package_export(text)
    assert len(records) == 2
    assert summary.dropped_malformed == 1
    assert summary.total_raw == 3


def test_parse_json_layout():
    data = [
        {"name": "openssl-3.2.1-1.fc40.x86_64", "version": "3.2.1", "description": "TLS", "dependencies": ["zlib"]},
        {"version": "1.0"},
        {"name": "curl", "description": "line\nbreak\tand tab", "dependencies": []},
    ]
    records, summary = parse_package_export(json.dumps(data))
    assert [r.name for r in records] == ["openssl", "curl"]
    assert summary.dropped_malformed == 1
    assert records[1].description == "line break and tab"


def test_parse_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        parse_package_export("\n# only a comment\n")
    with pytest.raises(EmptyCorpusError):
        parse_package_export("\tversion\tdesc\t\n")


def test_desk_corpus_dedup_count():
    text = synthetic_export(190, 10, seed=3)
    records, summary = parse_package_export(text)
    # independent set-based recount over the raw first column
    distinct = set()
    for line in text.splitlines():
        raw = line.split("\t")[0]
        distinct.add(raw.rsplit(".", 1)[0].rsplit("-", 2)[0])
    assert summary.total_raw == 200
    assert summary.total_deduplicated == len(distinct) == 190
    assert len(dedupe(records)) == 190


# -- dedupe -------------------------------------------------------------------


def rec(name, version, desc=""):
    return PackageRecord(raw_name=name, name=name, version=version, description=desc)


def test_dedupe_latest_description_wins():
    out = dedupe([rec("openssl", "3.0.9", "old"), rec("openssl", "3.2.1", "new")])
    assert len(out) == 1 and out[0].description == "new"


def test_dedupe_single_and_empty():
    r = rec("a", "1")
    assert dedupe([r]) == [r]
    assert dedupe([]) == []


def test_dedupe_numeric_segments():
    assert dedupe([rec("pkg", "1.10", "ten"), rec("pkg", "1.9", "nine")])[0].description == "ten"


def test_missing_version_loses():
    assert dedupe([rec("pkg", None, "none"), rec("pkg", "0.0.1", "some")])[0].description == "some"


def test_version_compare_against_tuple_oracle():
    versions = [tuple(v) for n in (1, 2, 3) for v in itertools.product(range(0, 12, 3), repeat=n)]
    for a, b in itertools.product(versions, repeat=2):
        sa, sb = ".".join(map(str, a)), ".".join(map(str, b))
        expected = (a > b) - (a < b)
        assert compare_versions(sa, sb) == expected, (sa, sb)


def test_epoch_dominates():
    assert compare_versions("1:1.0", "9.9") == 1


@settings(max_examples=50)
@given(st.randoms(use_true_random=False))
def test_parse_dedupe_order_insensitive(rnd):
    lines = synthetic_export(40, 8, seed=1).splitlines()
    baseline = dedupe(parse_package_export("\n".join(lines))[0])
    rnd.shuffle(lines)
    assert dedupe(parse_package_export("\n".join(lines))[0]) == baseline


def test_dedupe_names_are_distinct_input_names():
    rng = random.Random(0)
    records = [rec(f"p{rng.randint(0, 20)}", f"{rng.randint(0, 5)}.{rng.randint(0, 5)}") for _ in range(200)]
    out = dedupe(records)
    assert [r.name for r in out] == sorted({r.name for r in records})
