use std::io::Write;
use std::process;

use lwrr_fixtures::{catalog, find};

fn usage() -> ! {
    eprintln!("usage: fixtures <name> [args...]\n");
    for f in catalog() {
        eprintln!("  {:<10} {:<17} {}", f.name, f.class, f.description);
    }
    process::exit(2)
}

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(fixture) = args.next().as_deref().and_then(find) else {
        usage()
    };
    let rest: Vec<String> = args.collect();
    let out = lwrr::run_main(|| (fixture.run)(&rest));
    let mut stdout = std::io::stdout().lock();
    for line in &out.lines {
        let _ = writeln!(stdout, "{line}");
    }
    let _ = stdout.flush();
    process::exit(out.status)
}
