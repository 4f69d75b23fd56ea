from utils import env
from utils import logger
from utils.seeding import Streams
