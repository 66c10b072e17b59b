try:
    from causalpima.commands.generate import cmd_generate
    from causalpima.commands.train import cmd_train
    from causalpima.commands.report import cmd_report
except ImportError:
    from commands.generate import cmd_generate
    from commands.train import cmd_train
    from commands.report import cmd_report
