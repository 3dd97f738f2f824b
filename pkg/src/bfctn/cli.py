"""Command line entry point.

``bfctn run`` fuses one scenario, ``bfctn ablate`` sweeps an ablation grid,
``bfctn synth`` writes a synthetic exact-rank reference and ``bfctn serve``
starts the HTTP service.  ``run`` and ``ablate`` execute in-process unless
``--server URL`` is given, in which case they submit a job and poll it.

Failures exit nonzero and print ``{"error": category, "message": ...}`` on
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from typing import Any, Sequence

from .errors import EXIT_CODES, classify
from .runner import ABLATION_KINDS, NAMED_KERNELS, PRESETS, KernelSpec, ScenarioSpec, SrfSpec


class ServerError(RuntimeError):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _ranks(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ranks must be integers, got {text!r}")
    if len(values) != 6:
        raise argparse.ArgumentTypeError("ranks take six values r12,r13,r14,r23,r24,r34")
    return values


def _snr(text: str) -> float | None:
    if text.lower() in ("inf", "none", "noiseless"):
        return None
    return float(text)


def _kernel(text: str) -> KernelSpec:
    """``NAME`` from the named set, or ``KIND[:key=value,...]``."""
    if text in NAMED_KERNELS:
        return KernelSpec(**NAMED_KERNELS[text])
    kind, _, rest = text.partition(":")
    params: dict[str, Any] = {}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        params[key] = [float(v) for v in value.split("/")] if "/" in value else float(value)
    return KernelSpec(kind=kind, params=params)


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=sorted(PRESETS), help="preset sf/SNR pair")
    p.add_argument("--sf", type=int, help="spatial scale factor")
    p.add_argument("--snr", type=_snr, default=argparse.SUPPRESS, help="noise level in dB, or 'inf'")
    p.add_argument("--ranks", type=_ranks, help="six FCTN ranks, e.g. 35,4,12,4,12,4")
    p.add_argument("--patch", type=int, help="patch size m")
    p.add_argument("--overlap", type=int, help="patch overlap p")
    p.add_argument("--iters", type=int, help="sweeps per group")
    p.add_argument("--kernel", type=_kernel, help="named kernel or KIND:key=value,...")
    p.add_argument("--srf", help="SRF CSV file, 'gaussian' or 'block'")
    p.add_argument("--msi-bands", type=int, help="bands of a synthetic SRF")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--workers", type=int, help="groups fused concurrently")
    p.add_argument("--server", help="submit to a running service instead of computing locally")
    p.add_argument("--out", required=True, help="output directory")


def build_spec(args: argparse.Namespace) -> ScenarioSpec:
    fields: dict[str, Any] = {}
    for flag, name in (("sf", "sf"), ("ranks", "ranks"), ("patch", "patch"), ("overlap", "overlap"),
                       ("iters", "max_iters"), ("kernel", "kernel"), ("seed", "seed"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            fields[name] = value
    if hasattr(args, "snr"):
        fields["snr_db"] = args.snr
    if args.srf or args.msi_bands:
        srf = SrfSpec(out_bands=args.msi_bands or 3)
        if args.srf in ("gaussian", "block"):
            srf.generator = args.srf
        elif args.srf:
            srf.path = args.srf
        fields["srf"] = srf
    if args.scenario:
        return ScenarioSpec.preset(args.scenario, **fields)
    return ScenarioSpec(**fields)


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="bfctn", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate + fuse + score, or fuse a given pair")
    _add_scenario_flags(run)
    run.add_argument("--in-ref", help="reference HR-HSI container")
    run.add_argument("--in-hsi", help="observed LR-HSI container")
    run.add_argument("--in-msi", help="observed HR-MSI container")

    ablate = sub.add_parser("ablate", help="run an ablation grid")
    _add_scenario_flags(ablate)
    ablate.add_argument("--kind", required=True, choices=ABLATION_KINDS)
    ablate.add_argument("--grid", type=json.loads, help="JSON list of grid points")
    ablate.add_argument("--in-ref", required=True, help="reference HR-HSI container")

    synth = sub.add_parser("synth", help="write a synthetic exact-rank reference image")
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--bands", type=int, default=8)
    synth.add_argument("--ranks", type=_ranks, default=[8, 2, 3, 2, 3, 2])
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="container path")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    args = parser.parse_args(argv)
    if args.command == "run":
        pair = args.in_hsi is not None and args.in_msi is not None
        if (args.in_ref is None) == (not pair):
            parser.error("run needs --in-ref, or both --in-hsi and --in-msi")
    return args


def _submit(server: str, path: str, payload: dict, poll: float = 0.5) -> dict:
    import httpx

    base = server.rstrip("/")
    try:
        with httpx.Client(timeout=30) as client:
            resp = client.post(base + path, json=payload)
            if resp.status_code == 422:
                raise ServerError("invalid-config", resp.text)
            resp.raise_for_status()
            job_id = resp.json()["id"]
            while True:
                job = client.get(f"{base}/jobs/{job_id}").json()
                if job["state"] == "done":
                    return job["result"]
                if job["state"] == "failed":
                    raise ServerError(job["error"]["category"], job["error"]["message"])
                time.sleep(poll)
    except httpx.HTTPError as exc:
        raise ServerError("server", str(exc)) from exc


def _print_rows(rows: list[dict]) -> None:
    for row in rows:
        print(json.dumps(row, default=str))


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "serve":
            import uvicorn

            uvicorn.run("bfctn.service.app:app", host=args.host, port=args.port)
            return 0
        if args.command == "synth":
            from .io import write_image
            from .runner import synthetic_reference

            write_image(args.out, synthetic_reference(args.size, args.bands, args.ranks, args.seed))
            return 0
        spec = build_spec(args)
        if args.command == "run":
            if args.server:
                payload = {"spec": spec.model_dump(mode="json"), "out_dir": args.out, "reference_path": args.in_ref,
                           "hsi_path": args.in_hsi, "msi_path": args.in_msi}
                _print_rows([_submit(args.server, "/scenarios", payload)["metrics"]])
            else:
                from .io import load_image
                from .runner import fuse_pair, run_scenario

                if args.in_ref:
                    res = run_scenario(spec, load_image(args.in_ref), args.out)
                else:
                    res = fuse_pair(spec, load_image(args.in_hsi), load_image(args.in_msi), args.out)
                _print_rows([res.csv_row()])
        else:
            if args.server:
                payload = {"kind": args.kind, "spec": spec.model_dump(mode="json"), "grid": args.grid,
                           "reference_path": args.in_ref, "out_dir": args.out}
                _print_rows(_submit(args.server, "/ablations", payload)["rows"])
            else:
                from .io import load_image
                from .runner import run_ablation

                _print_rows(run_ablation(args.kind, load_image(args.in_ref), spec, args.grid, args.out))
        return 0
    except Exception as exc:
        if isinstance(exc, ServerError):
            category = exc.category
            # remote failures keep their category; container categories are the open-ended set
            group = category if category in EXIT_CODES else "container"
        else:
            category, group = classify(exc)
        if args.verbose:
            logging.exception("command failed")
        print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[group]


if __name__ == "__main__":
    sys.exit(main())
