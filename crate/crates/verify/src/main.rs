use std::process::ExitCode;

fn main() -> ExitCode {
    sfdsfi_cli::main()
}
