from inflect import engine

p = engine()

STATUS_PHRASES = {
    "converged": "converged",
    "max_iters": "stopped at the iteration limit",
    "budget": "ran out of wall-clock budget",
    "detected_cycle": "was stopped after revisiting an earlier iterate",
    "diverged": "diverged",
}


def small_number(n):
    """Spell out counts up to twenty, digits with separators above."""
    return p.number_to_words(n) if n <= 20 else f"{n:,}"


def counted(n, word):
    return f"{small_number(n)} {p.plural(word, n)}"


def listing(items):
    """'a', 'a and b', 'a, b and c'."""
    return p.join([str(item) for item in items], final_sep="")


def run_summary(trace, solver, problem_name=None):
    """Plain-English paragraph describing how a run ended."""
    status = STATUS_PHRASES.get(trace.terminal_status, str(trace.terminal_status))
    subject = f"The {solver} run" + (f" on *{problem_name}*" if problem_name else "")
    md = f"{subject} {status} after {counted(len(trace), 'iteration')}"

    if trace.initial_f is not None and trace.records:
        md = f"{md}, taking the objective from {trace.initial_f:.6g} to {trace.final_f:.6g}."
    else:
        md = f"{md}."

    if trace.cycle is not None:
        md = (
            f"{md} The iterates repeat with period {small_number(trace.cycle.period)}, "
            f"first seen at the {p.ordinal(trace.cycle.first_r)} iteration."
        )

    if trace.notes:
        md = f"{md} {p.plural('Note', len(trace.notes))}: {listing(trace.notes)}."
    return md


def experiment_summary(checks):
    """One paragraph on a table of reproduced checks (columns scenario, check, pass)."""
    failed = checks[~checks["pass"].astype(bool)]
    scenarios = list(dict.fromkeys(checks["scenario"]))
    md = f"Ran {counted(len(checks), 'check')} across {counted(len(scenarios), 'scenario')} ({listing(scenarios)})"
    if failed.empty:
        return f"{md}; all passed."
    names = [f"{row['scenario']}/{row['check']}" for _, row in failed.iterrows()]
    return f"{md}; {small_number(len(failed))} failed: {listing(names)}."
