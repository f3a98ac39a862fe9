"""Command-line entry point: ``kpuf <subcommand> [options]``.

Randomness derives from ``--seed`` alone: the PUF image uses the seed
directly, run ``r`` of an experiment uses ``counter_trn(seed, r)``, the default
password is SHA3-512 over ``b"kpuf-password"`` and the seed, and MCMC chains
draw from ``SeedSequence(seed)`` children.

Exit codes: 0 success, 1 domain or data error, 2 usage error.  Errors go to
stderr as ``ERROR:<category>: message``.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import attack, cipher, experiment, puf
from .digest import TRN_OCTETS, counter_trn, fresh_trn, sha3_512, sha3_selftest
from .exceptions import DomainError, KpufError
from .stats import binomial_gof, binomial_pmf_oracle, chi_square_uniformity
from .stats.glmm import VARIANTS, MCMCSettings, ModelSpec, fit_glmm, screen_cell_effects
from .stats.loo import compare_models
from .svg import interval_plot

SUMMARY_HEADER = ("param", "median", "lo95", "hi95", "lo80", "hi80", "rhat", "ess")
COMPARE_HEADER = ("model", "looic", "looic_se", "elpd_diff", "se_diff")
INTERVAL_HEADER = ("cell", "median", "lower", "upper", "flagged")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR:usage: {message}", file=sys.stderr)
        sys.exit(2)


def default_password(seed):
    return sha3_512(b"kpuf-password" + int(seed).to_bytes(8, "little"))


def read_password(path):
    """A password file holds 64 raw octets or 128 hex digits."""
    data = Path(path).read_bytes()
    if len(data) == TRN_OCTETS:
        return data
    try:
        text = data.decode("ascii").strip()
        raw = bytes.fromhex("".join(text.split()))
    except (UnicodeDecodeError, ValueError):
        raw = b""
    if len(raw) != TRN_OCTETS:
        raise DomainError(f"password file must hold {TRN_OCTETS} octets or {2 * TRN_OCTETS} hex digits")
    return raw


def _password(args):
    if args.password_file:
        return read_password(args.password_file)
    return default_password(args.seed)


def _puf(args):
    if args.puf:
        return puf.load_puf(args.puf)
    return puf.generate_puf(args.seed)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mcmc(args):
    if args.iters < 2:
        raise DomainError("--iters must be at least 2")
    warmup = args.iters // 2
    return MCMCSettings(chains=args.chains, warmup=warmup, draws=args.iters - warmup)


def _fit(table, variant, args):
    return fit_glmm(
        table, ModelSpec(variant, table.n_trials), _mcmc(args), seed=args.seed,
        check_convergence=not args.allow_unconverged,
    )


def cmd_genpuf(args):
    image = puf.generate_puf(args.seed, id=args.id)
    puf.save_puf(image, args.out)
    print(f"wrote {args.out} (seed={args.seed})")


def cmd_encrypt(args):
    image = _puf(args)
    plaintext = Path(args.input).read_bytes()
    trn = fresh_trn() if args.entropy else counter_trn(args.seed, 1)
    ct = cipher.encrypt(plaintext, _password(args), trn, image, args.rotations)
    if args.hex:
        Path(args.out).write_text(ct.to_hex())
    else:
        Path(args.out).write_bytes(ct.to_bytes())
    print(f"encrypted {len(plaintext)} octets into {len(ct)} symbols (R={ct.rotations})")


def cmd_decrypt(args):
    image = _puf(args)
    ct = cipher.Ciphertext.load(Path(args.input).read_bytes())
    plaintext = cipher.decrypt(ct, _password(args), image)
    Path(args.out).write_bytes(plaintext)
    print(f"decrypted {len(plaintext)} octets")


def _plaintext(args):
    if args.input:
        return Path(args.input).read_bytes()
    text = attack.load_corpus()
    return text[: args.chars].encode("ascii")


def cmd_experiment(args):
    out = _out_dir(args)
    table = experiment.run_visit_experiment(
        _plaintext(args), args.runs, _password(args), _puf(args), args.seed, entropy=args.entropy,
    )
    freq = experiment.histogram(table)
    experiment.export_visits(table, out / "visits.csv")
    experiment.export_histogram(freq, out / "histogram.csv")
    experiment.export_grid(table, 1, out / "grid_run1.csv")
    chi = chi_square_uniformity(table)
    gof = binomial_gof(freq, table.n_trials, 1 / puf.N_CELLS)
    print(f"runs={table.n_runs} trials_per_run={table.n_trials} records={table.counts.size}")
    print(f"max visits={int(table.counts.max())} zero fraction={freq[0] / table.counts.size:.4f}")
    print(f"uniformity chi2={chi.statistic:.2f} dof={chi.dof} p={chi.pvalue:.4f}")
    if chi.warning:
        print(f"warning: {chi.warning}")
    print(f"binomial gof chi2={gof.statistic:.2f} dof={gof.dof} p={gof.pvalue:.4f}")


def cmd_fit(args):
    table = experiment.import_visits(args.input)
    fit = _fit(table, args.model, args)
    _write_csv(args.out, SUMMARY_HEADER, fit.summary())
    for name in ("a_bar", "sigma_c", "sigma_r"):
        if name in fit.rhat:
            print(f"{name}: rhat={fit.rhat[name]:.4f} ess={fit.ess[name]:.0f}")


def cmd_compare(args):
    table = experiment.import_visits(args.input)
    fits = [_fit(table, v, args) for v in VARIANTS]
    rows = compare_models(fits, names=list(VARIANTS))
    _write_csv(args.out, COMPARE_HEADER, [
        (r.model, r.looic, r.looic_se, r.elpd_diff, r.se_diff) for r in rows
    ])
    for r in rows:
        print(f"{r.model}: {r.method} ic={r.looic:.1f} se={r.looic_se:.1f} "
              f"elpd_diff={r.elpd_diff:.2f} se_diff={r.se_diff:.2f}")


def cmd_screen(args):
    if args.model == "none":
        raise DomainError("model 'none' has no cell effects to screen")
    if args.cells < 1:
        raise DomainError("--cells must be positive")
    table = experiment.import_visits(args.input)
    fit = _fit(table, args.model, args)
    screen = screen_cell_effects(fit, args.level / 100)
    rows = [(c, screen.median[c], screen.lower[c], screen.upper[c], int(screen.flagged[c]))
            for c in range(puf.N_CELLS)]
    out = _out_dir(args)
    _write_csv(out / "intervals.csv", INTERVAL_HEADER, rows)
    cells = np.arange(min(args.cells, puf.N_CELLS))
    (out / "intervals.svg").write_text(interval_plot(screen, cells))
    print(f"{int(screen.flagged.sum())} of {puf.N_CELLS} cell intervals exclude zero at {args.level}%")


def cmd_attack(args):
    out = _out_dir(args)
    profile = attack.load_profile(args.profile) if args.profile else attack.ENGLISH
    text = attack.normalize_text(Path(args.input).read_text()) if args.input else attack.load_corpus()
    baseline = attack.frequency_attack(attack.mono_substitution_encrypt(text, args.seed), profile, text)
    symbols, truth = attack.protocol_symbols(text, args.runs, _password(args), _puf(args), args.seed)
    protocol = attack.frequency_attack(symbols, profile, truth, symbols_per_char=cipher.BLOCKS_PER_CHAR)
    baseline.to_csv(out / "baseline.csv")
    protocol.to_csv(out / "protocol.csv")
    lines = [
        "== monoalphabetic baseline ==", baseline.summary(), "",
        "== keyless protocol ==", protocol.summary(), "",
        f"separation: {baseline.recovery - protocol.recovery:.4f}",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_selftest(args):
    checks = list(sha3_selftest())
    checks.append(("capacity table", [cipher.capacity(r) for r in cipher.STANDARD_ROTATIONS] == [240, 481, 963]))
    ref = [binomial_pmf_oracle(480, 1 / 1024, k) for k in range(10)]
    checks.append(("binomial pmf", np.allclose(ref, stats.binom.pmf(range(10), 480, 1 / 1024), rtol=0, atol=1e-12)))
    image = puf.generate_puf(args.seed)
    pw = default_password(args.seed)
    msg = attack.load_corpus()[:240].encode()
    ct = cipher.encrypt(msg, pw, counter_trn(args.seed, 1), image)
    checks.append(("round trip", cipher.decrypt(ct, pw, image) == msg))
    checks.append(("decodability", puf.validate_decodability(image) == []))
    for label, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {label}")
    if not all(ok for _, ok in checks):
        raise KpufError("self-test failed")


def build_parser():
    p = _Parser(prog="kpuf", description="Keyless PUF encryption toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")

    def keyed(sp):
        sp.add_argument("--puf", help="PUF image CSV; generated from --seed when omitted")
        sp.add_argument("--password-file", help="64 raw octets or 128 hex digits")

    def mcmc(sp):
        sp.add_argument("--in", dest="input", required=True, help="visit CSV")
        sp.add_argument("--chains", type=int, default=4)
        sp.add_argument("--iters", type=int, default=2000, help="sweeps per chain, half warmup")
        sp.add_argument("--allow-unconverged", action="store_true",
                        help="report fits that miss the R-hat/ESS gate instead of failing")

    sp = sub.add_parser("genpuf", help="generate a PUF image CSV")
    seeded(sp)
    sp.add_argument("--id", help="image identifier stored in the sidecar")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_genpuf)

    sp = sub.add_parser("encrypt", help="encrypt a file")
    seeded(sp)
    keyed(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--rotations", type=int, help="force R instead of the smallest fitting one")
    sp.add_argument("--entropy", action="store_true", help="draw the TRN from the OS")
    sp.add_argument("--hex", action="store_true", help="write a hex dump instead of binary")
    sp.set_defaults(func=cmd_encrypt)

    sp = sub.add_parser("decrypt", help="decrypt a binary or hex ciphertext")
    seeded(sp)
    keyed(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decrypt)

    sp = sub.add_parser("experiment", help="cell-visit experiment; writes visits/histogram/grid CSVs")
    seeded(sp)
    keyed(sp)
    sp.add_argument("--runs", type=int, default=100)
    sp.add_argument("--chars", type=int, default=240, help="plaintext length taken from the corpus")
    sp.add_argument("--in", dest="input", help="plaintext file instead of the corpus")
    sp.add_argument("--entropy", action="store_true", help="OS TRNs; output is not replayable")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("fit", help="posterior summary CSV for one model variant")
    seeded(sp)
    mcmc(sp)
    sp.add_argument("--model", choices=VARIANTS, default="both")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("compare", help="LOO comparison of the three variants")
    seeded(sp)
    mcmc(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("screen", help="cell-effect intervals CSV and SVG plot")
    seeded(sp)
    mcmc(sp)
    sp.add_argument("--model", choices=VARIANTS, default="both")
    sp.add_argument("--level", type=int, choices=(80, 95), default=95)
    sp.add_argument("--cells", type=int, default=50, help="cells shown in the plot")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("attack", help="frequency attack on baseline and keyless ciphertexts")
    seeded(sp)
    keyed(sp)
    sp.add_argument("--runs", type=int, default=100, help="keyless encryptions of the text")
    sp.add_argument("--in", dest="input", help="English text instead of the bundled corpus")
    sp.add_argument("--profile", help="letter,frequency CSV")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("selftest", help="known-answer and oracle checks")
    seeded(sp)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except KpufError as exc:
        print(f"ERROR:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR:io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
