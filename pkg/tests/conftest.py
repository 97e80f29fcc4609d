from __future__ import annotations

import random

import pytest

from ogb import trust


def starbucks_dict():
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [12.51133, 41.8919]},
        "properties": {
            "oid": 1234,
            "tid": "Foo",
            "uid": "Alice",
            "cid": "ShopApp",
            "name": "Starbucks",
            "amenity": "Coffee Shop",
        },
    }


@pytest.fixture
def starbucks():
    return starbucks_dict()


class KeyRing:
    """Admin plus one tenant/user hierarchy, deterministic from a seed."""

    def __init__(self, seed=7):
        rng = random.Random(seed)
        self.admin_kp = trust.KeyPair.from_seed(rng.randbytes(32))
        self.admin_cert = trust.make_anchor(self.admin_kp)
        self.tenants = {}
        self.users = {}
        self.engines = {}
        self._rng = rng

    def tenant(self, tid):
        if tid not in self.tenants:
            kp = trust.KeyPair.from_seed(self._rng.randbytes(32))
            cert = trust.issue(self.admin_kp, self.admin_cert,
                               trust.tenant_identity(tid), kp.public_bytes)
            self.tenants[tid] = (kp, cert)
        return self.tenants[tid]

    def user(self, tid, uid):
        if (tid, uid) not in self.users:
            tkp, tcert = self.tenant(tid)
            kp = trust.KeyPair.from_seed(self._rng.randbytes(32))
            cert = trust.issue(tkp, tcert, trust.user_identity(tid, uid), kp.public_bytes)
            self.users[(tid, uid)] = (kp, cert)
        return self.users[(tid, uid)]

    def engine(self, engine_id):
        if engine_id not in self.engines:
            kp = trust.KeyPair.from_seed(self._rng.randbytes(32))
            cert = trust.issue(self.admin_kp, self.admin_cert,
                               trust.engine_identity(engine_id), kp.public_bytes)
            self.engines[engine_id] = (kp, cert)
        return self.engines[engine_id]

    def all_certs(self):
        certs = [self.admin_cert]
        certs += [cert for _, cert in self.tenants.values()]
        certs += [cert for _, cert in self.users.values()]
        certs += [cert for _, cert in self.engines.values()]
        return certs

    def store(self, fetcher=None):
        s = trust.TrustStore(self.admin_cert, fetcher=fetcher)
        for cert in self.all_certs():
            s.add_certificate(cert)
        return s


@pytest.fixture
def keyring():
    ring = KeyRing()
    ring.user("Foo", "Alice")
    return ring
