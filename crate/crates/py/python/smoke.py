"""Smoke test for the pyxchain extension module.

Run after `pip install -e crates/py --no-build-isolation`:

    python crates/py/python/smoke.py
"""

import itertools
import json

import pyxchain


def scenarios():
    names = [name for name, _ in pyxchain.list_scenarios()]
    assert "travel_agent_two_agents" in names
    cfg = json.loads(pyxchain.scenario_json("nested_four_chain"))
    assert cfg["name"] == "nested_four_chain"


def nested_run():
    r = pyxchain.run("nested_four_chain", seed=3)
    assert r.submissions == [("funcA", "Committed", None)]
    assert dict(r.storage(4, 0xD)) == {1: 10}
    assert r.safety() and r.liveness()
    safety, liveness = pyxchain.check(r.trace, r.final_state, "nested_four_chain")
    assert safety.passed and liveness.passed
    first = json.loads(r.trace.splitlines()[0])
    assert first["kind"] == "submission"


def locking():
    r = pyxchain.run("travel_agent_two_agents", seed=1)
    statuses = {label: (status, reason) for label, status, reason in r.submissions}
    assert statuses["agent_a"] == ("Committed", None)
    assert statuses["agent_b"][0] == "Ignored"
    assert statuses["agent_b"][1].startswith("LockFault")


def faults():
    r = pyxchain.run("nested_four_chain", faults=["crash:after_start_before_commit"])
    assert r.submissions[0][1] == "Ignored"
    r = pyxchain.run("nested_four_chain", faults=["byzantine:2:3:crash"])
    assert r.outside_assumptions
    try:
        pyxchain.run("nested_four_chain", faults=["crash:nowhere"])
    except ValueError:
        pass
    else:
        raise AssertionError("bad fault spec accepted")


def threshold():
    pk, shares, commitments = pyxchain.keygen(5, 3, 42)
    msg = b"hello"
    sig_shares = [(s[0], pyxchain.sign_share(s, msg)) for s in shares]
    sigs = {pyxchain.combine(list(c), 5, 3) for c in itertools.combinations(sig_shares, 3)}
    assert len(sigs) == 1
    sig = sigs.pop()
    assert pyxchain.verify(pk, msg, sig)
    assert not pyxchain.verify(pk, b"other", sig)
    assert all(pyxchain.verify_share(s, commitments) for s in shares)
    idx, secret, blinding = shares[0]
    assert not pyxchain.verify_share((idx, secret + 1, blinding), commitments)


def element(tx_type, chain, to, from_chain, from_address, fn, args):
    return {
        "tx_type": tx_type, "nonce": 0, "gas_price": 0, "gas_limit": 0,
        "to": to, "value": 0, "data": {"function_name": fn, "args": args},
        "chain_id": chain, "sender": "0xe0",
        "coordination_chain": 100, "coordination_contract": "0xc0",
        "timeout_block": 30, "crosschain_tx_id": 7, "originating_chain": 1,
        "from_chain": from_chain, "from_address": from_address,
        "subordinates": [],
    }


def encoding():
    tx = element("originating", 1, "0xa", 1, "0xe0", "funcA", [1])
    tx["subordinates"].append(element("subordinate", 2, "0xb", 1, "0xa", "funcB", [1]))
    raw = pyxchain.encode_transaction(json.dumps(tx))
    assert raw[8:16] == bytes(8)
    back = json.loads(pyxchain.decode_transaction(raw))
    assert pyxchain.encode_transaction(json.dumps(back)) == raw
    assert pyxchain.validate_nesting(json.dumps(tx)) == []
    tx["subordinates"][0]["from_chain"] = 3
    kinds = [json.loads(v)["kind"] for v in pyxchain.validate_nesting(json.dumps(tx))]
    assert kinds == ["from_chain_mismatch"]
    try:
        pyxchain.decode_transaction(raw + b"\x00")
    except ValueError:
        pass
    else:
        raise AssertionError("trailing byte accepted")


if __name__ == "__main__":
    for check in (scenarios, nested_run, locking, faults, threshold, encoding):
        check()
        print(f"ok {check.__name__}")
