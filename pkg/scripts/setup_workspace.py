#!/usr/bin/env python3
"""
Bootstrap a working directory for the semsim pipeline
This script will:
1. Train the BPE vocabulary on the bundled fixture corpus
2. Run pretrain-lite and save the frozen scorer checkpoint
"""

import os
import sys
from pathlib import Path

from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from semsim.cli import run_command  # noqa: E402

# Load environment variables
load_dotenv()

# Configuration
CONFIG_PATH = os.getenv('SEMSIM_CONFIG', 'config/semsim.conf')
PRETRAIN_EPOCHS = os.getenv('SEMSIM_PRETRAIN_EPOCHS', '30')


def setup_workspace(config_path: str = CONFIG_PATH, pretrain_epochs: str = PRETRAIN_EPOCHS) -> bool:
    """Vocabulary then scorer; stops at the first failing step"""
    steps = [
        ('🔤 Training vocabulary', ['--config', config_path, 'vocab']),
        ('🏋️ Pretraining scorer', ['--config', config_path, 'pretrain', '--epochs', pretrain_epochs,
                                   '--max-steps', '0']),
    ]
    for label, argv in steps:
        print(f"\n{label}...")
        status = run_command(argv)
        if status != 0:
            print(f"\n❌ {label} failed (exit status {status})")
            return False
        print(f"   ✅ Done")
    return True


def main():
    """Main function"""

    print("\n🚀 semsim Workspace Setup")
    print("=" * 60)
    print(f"   Config: {CONFIG_PATH}")

    if setup_workspace():
        print(f"\n" + "=" * 60)
        print("✅ SETUP COMPLETE!")
        print("=" * 60)
        print(f"\n📝 Next Steps:")
        print(f"   1. python -m semsim train --objective ml_only")
        print(f"   2. python -m semsim generate --input data/fixture.jsonl --output work/generated.jsonl")
        print(f"   3. python -m semsim evaluate --input work/generated.jsonl")
    else:
        print(f"\n❌ Setup failed. Please check the errors above.")
        sys.exit(1)


if __name__ == "__main__":
    main()
