from core.control import run
